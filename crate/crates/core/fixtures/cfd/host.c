#include <CL/cl.h>
#include <stdlib.h>

#define NELR 64

int main(void) {
    cl_int err;
    cl_platform_id platform;
    cl_device_id device;
    clGetPlatformIDs(1, &platform, NULL);
    clGetDeviceIDs(platform, CL_DEVICE_TYPE_ACCELERATOR, 1, &device, NULL);
    cl_context context = clCreateContext(NULL, 1, &device, NULL, NULL, &err);
    cl_command_queue queue = clCreateCommandQueue(context, device, 0, &err);
    cl_program program = load_program(context, device, "cfd.aocx");

    float h_v_energy[NELR], h_old_v_energy[NELR], h_areas[NELR];
    init_inputs(h_v_energy, h_old_v_energy, h_areas, NELR);

    cl_mem v_energy = clCreateBuffer(context, CL_MEM_READ_WRITE, sizeof(float) * NELR, NULL, &err);
    cl_mem old_v_energy = clCreateBuffer(context, CL_MEM_READ_ONLY, sizeof(float) * NELR, NULL, &err);
    cl_mem areas = clCreateBuffer(context, CL_MEM_READ_ONLY, sizeof(float) * NELR, NULL, &err);
    cl_mem step_factors = clCreateBuffer(context, CL_MEM_READ_WRITE, sizeof(float) * NELR, NULL, &err);
    cl_mem fluxes_energy = clCreateBuffer(context, CL_MEM_READ_WRITE, sizeof(float) * NELR, NULL, &err);

    cl_kernel k_step = clCreateKernel(program, "compute_step_factor", &err);
    cl_kernel k_flux = clCreateKernel(program, "compute_flux", &err);
    cl_kernel k_time = clCreateKernel(program, "time_step", &err);
    int nelr = NELR;

    clEnqueueWriteBuffer(queue, v_energy, CL_TRUE, 0, sizeof(float) * NELR, h_v_energy, 0, NULL, NULL);
    clEnqueueWriteBuffer(queue, old_v_energy, CL_TRUE, 0, sizeof(float) * NELR, h_old_v_energy, 0, NULL, NULL);
    clEnqueueWriteBuffer(queue, areas, CL_TRUE, 0, sizeof(float) * NELR, h_areas, 0, NULL, NULL);

    for (int iter = 0; iter < 2; iter++) {
        clSetKernelArg(k_step, 0, sizeof(cl_mem), (void*)&v_energy);
        clSetKernelArg(k_step, 1, sizeof(cl_mem), (void*)&areas);
        clSetKernelArg(k_step, 2, sizeof(cl_mem), (void*)&step_factors);
        clSetKernelArg(k_step, 3, sizeof(int), (void*)&nelr);
        clEnqueueTask(queue, k_step, 0, NULL, NULL);
        clFinish(queue);

        for (int j = 0; j < 3; j++) {
            clSetKernelArg(k_flux, 0, sizeof(cl_mem), (void*)&v_energy);
            clSetKernelArg(k_flux, 1, sizeof(cl_mem), (void*)&step_factors);
            clSetKernelArg(k_flux, 2, sizeof(cl_mem), (void*)&fluxes_energy);
            clSetKernelArg(k_flux, 3, sizeof(int), (void*)&nelr);
            clEnqueueTask(queue, k_flux, 0, NULL, NULL);
            clFinish(queue);

            clSetKernelArg(k_time, 0, sizeof(cl_mem), (void*)&old_v_energy);
            clSetKernelArg(k_time, 1, sizeof(cl_mem), (void*)&v_energy);
            clSetKernelArg(k_time, 2, sizeof(cl_mem), (void*)&step_factors);
            clSetKernelArg(k_time, 3, sizeof(cl_mem), (void*)&fluxes_energy);
            clSetKernelArg(k_time, 4, sizeof(int), (void*)&nelr);
            clEnqueueTask(queue, k_time, 0, NULL, NULL);
            clFinish(queue);
        }
    }

    clEnqueueReadBuffer(queue, v_energy, CL_TRUE, 0, sizeof(float) * NELR, h_v_energy, 0, NULL, NULL);
    report(h_v_energy, NELR);
    return 0;
}
